//! The assembled tube model: build with diagnostics, Newton inversion of `μ`,
//! and evaluation of the exhaustion `u`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::complexify::{mu_raw, ComplexPoint, Continuation, DEFAULT_CONTINUATION_STEP, DEFAULT_REAL_TIME_CAP};
use crate::error::{Error, Result};
use crate::finsler::{with_dim, wrap_pi, FinslerMetric, MetricSpec, SpherePoint};
use crate::geodesic::IntegratorConfig;
use crate::sampling::QuasiRandom;

/// `|Im ζ|` below which a point counts as lying on `M`.
pub const SINGULAR_SET_CUTOFF: f64 = 1e-14;

/// Smallest tube height the build procedure tries.
pub const MIN_RADIUS: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// Finite-difference steps for Hessians and gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    pub hessian_step: f64,
    pub gradient_step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            hessian_step: 1e-3,
            gradient_step: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub integrator: IntegratorConfig,
    pub continuation_step: f64,
    pub real_time_cap: f64,
    pub newton: NewtonConfig,
    pub fd: FdConfig,
    pub min_radius: f64,
    pub pilot_samples: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            continuation_step: DEFAULT_CONTINUATION_STEP,
            real_time_cap: DEFAULT_REAL_TIME_CAP,
            newton: NewtonConfig::default(),
            fd: FdConfig::default(),
            min_radius: MIN_RADIUS,
            pilot_samples: 8,
        }
    }
}

/// Outcome of one tube height tried by [`MAModel::build`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildAttempt {
    pub radius: f64,
    pub passed: bool,
    pub max_roundtrip_error: f64,
    pub min_singular_value: f64,
    pub min_pair_distance: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildDiagnostics {
    pub requested_radius: f64,
    pub attempts: Vec<BuildAttempt>,
}

/// On-disk form of a built model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub metric: MetricSpec,
    pub radius: f64,
    pub config: ModelConfig,
    pub diagnostics: BuildDiagnostics,
}

/// `(p, r)` with `μ(p, r) = ζ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeCoordinates {
    pub p: SpherePoint,
    pub r: f64,
}

/// Newton iterate and the Jacobian it was last refreshed with; reused to start
/// nearby inversions.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonStart {
    q: DVector<f64>,
    jacobian: Option<DMatrix<f64>>,
    anchor: Vec<f64>,
}

impl NewtonStart {
    /// First-order guess for the preimage of `zeta`.
    fn predict(&self, zeta: &[f64]) -> Option<DVector<f64>> {
        let n2 = zeta.len();
        let delta = DVector::from_fn(n2, |k, _| {
            if k < n2 / 2 {
                wrap_pi(zeta[k] - self.anchor[k])
            } else {
                zeta[k] - self.anchor[k]
            }
        });
        self.jacobian.clone()?.lu().solve(&delta).map(|d| &self.q + d)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MAModel {
    metric: FinslerMetric,
    radius: f64,
    config: ModelConfig,
    continuation: Continuation,
    diagnostics: BuildDiagnostics,
}

impl MAModel {
    /// Builds a model with the largest `R ≤ requested_radius`, halving on failure,
    /// whose pilot-grid diagnostics pass.
    pub fn build(metric: FinslerMetric, requested_radius: f64, config: &ModelConfig) -> Result<Self> {
        config.integrator.validate()?;
        if !(requested_radius > 0.0 && requested_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tube height {requested_radius} must be positive"
            )));
        }
        let mut diagnostics = BuildDiagnostics {
            requested_radius,
            attempts: Vec::new(),
        };
        let mut radius = requested_radius;
        while radius >= config.min_radius {
            let model = Self::assemble(metric.clone(), radius, *config, diagnostics.clone());
            let attempt = model.pilot_check();
            let passed = attempt.passed;
            diagnostics.attempts.push(attempt);
            if passed {
                return Ok(Self { diagnostics, ..model });
            }
            radius *= 0.5;
        }
        Err(Error::TubeConstructionFailed {
            min_radius: config.min_radius,
        })
    }

    fn assemble(metric: FinslerMetric, radius: f64, config: ModelConfig, diagnostics: BuildDiagnostics) -> Self {
        let mut continuation = Continuation::new(metric.clone(), radius).with_step(config.continuation_step);
        continuation.real_time_cap = config.real_time_cap;
        Self {
            metric,
            radius,
            config,
            continuation,
            diagnostics,
        }
    }

    pub fn from_descriptor(desc: &ModelDescriptor) -> Result<Self> {
        let metric = FinslerMetric::from_spec(&desc.metric)?;
        desc.config.integrator.validate()?;
        if !(desc.radius > 0.0) {
            return Err(Error::SpecInvalid(format!("radius {} must be positive", desc.radius)));
        }
        Ok(Self::assemble(
            metric,
            desc.radius,
            desc.config,
            desc.diagnostics.clone(),
        ))
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            metric: self.metric.to_spec(),
            radius: self.radius,
            config: self.config,
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn metric(&self) -> &FinslerMetric {
        &self.metric
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fd(&self) -> FdConfig {
        self.config.fd
    }

    pub fn continuation(&self) -> &Continuation {
        &self.continuation
    }

    pub fn diagnostics(&self) -> &BuildDiagnostics {
        &self.diagnostics
    }

    pub fn mu(&self, p: &SpherePoint, r: f64) -> Result<ComplexPoint> {
        Ok(self.continuation.mu(p, r)?.point)
    }

    fn pilot_check(&self) -> BuildAttempt {
        let mut attempt = BuildAttempt {
            radius: self.radius,
            passed: false,
            max_roundtrip_error: 0.0,
            min_singular_value: f64::INFINITY,
            min_pair_distance: f64::INFINITY,
            failure: None,
        };
        let samples = sample_tube(
            self.dim(),
            self.config.pilot_samples,
            0,
            0.25 * self.radius,
            0.95 * self.radius,
        );
        let mut images = Vec::with_capacity(samples.len());
        for (p, r) in &samples {
            let outcome = (|| -> Result<()> {
                let zeta = self.mu(p, *r)?;
                let tc = self.invert_mu(&zeta)?;
                let err = p.distance(&tc.p).max((tc.r - r).abs());
                attempt.max_roundtrip_error = attempt.max_roundtrip_error.max(err);
                let sigma = smallest_singular_value(&self.tube_jacobian(p, *r, 1e-4)?);
                attempt.min_singular_value = attempt.min_singular_value.min(sigma);
                images.push(zeta);
                Ok(())
            })();
            if let Err(e) = outcome {
                attempt.failure = Some(e.to_string());
                return attempt;
            }
        }
        for i in 0..images.len() {
            for j in 0..i {
                attempt.min_pair_distance = attempt.min_pair_distance.min(images[i].chart_distance(&images[j]));
            }
        }
        attempt.failure = if attempt.max_roundtrip_error > 1e-8 {
            Some(format!("round trip error {:.3e}", attempt.max_roundtrip_error))
        } else if attempt.min_singular_value <= 1e-3 {
            Some(format!("immersion margin {:.3e}", attempt.min_singular_value))
        } else if attempt.min_pair_distance <= 1e-6 {
            Some(format!("pilot images within {:.3e}", attempt.min_pair_distance))
        } else {
            None
        };
        attempt.passed = attempt.failure.is_none();
        attempt
    }

    /// Real `2n × 2n` Jacobian of `(SM coords, r) ↦ (Re μ, Im μ)` by central differences.
    pub fn tube_jacobian(&self, p: &SpherePoint, r: f64, h: f64) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut q = p.coords();
        q.push(r);
        let center = self.mu(p, r)?;
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..2 * n {
            let eval = |d: f64| -> Result<Vec<f64>> {
                let mut qk = q.clone();
                qk[k] += d;
                let pk = p.with_coords(&qk[..2 * n - 1]);
                Ok(self.mu(&pk, qk[2 * n - 1])?.real_offset(&center))
            };
            let (plus, minus) = (eval(h)?, eval(-h)?);
            for row in 0..2 * n {
                jac[(row, k)] = (plus[row] - minus[row]) / (2.0 * h);
            }
        }
        Ok(jac)
    }

    fn check_point(&self, zeta: &ComplexPoint) -> Result<()> {
        if zeta.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: zeta.dim(),
            });
        }
        if zeta.z.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidArgument("point is not finite".into()));
        }
        Ok(())
    }

    /// Solves `μ(p, r) = ζ` by Newton's method.
    pub fn invert_mu(&self, zeta: &ComplexPoint) -> Result<TubeCoordinates> {
        self.invert_mu_warm(zeta, None).map(|(tc, _)| tc)
    }

    /// [`Self::invert_mu`] started from a nearby solve; returns the state for reuse.
    pub fn invert_mu_warm(
        &self,
        zeta: &ComplexPoint,
        start: Option<&NewtonStart>,
    ) -> Result<(TubeCoordinates, NewtonStart)> {
        self.check_point(zeta)?;
        let y = zeta.im();
        if zeta.im_norm() < SINGULAR_SET_CUTOFF {
            return Err(Error::OnSingularSet);
        }
        let x = zeta.re();
        let n = self.dim();
        let target: Vec<f64> = x.iter().chain(&y).copied().collect();
        let sign = y[0] >= 0.0;
        let to_point = |q: &DVector<f64>| -> SpherePoint {
            if n == 1 {
                SpherePoint::on_line(q[0], sign)
            } else {
                SpherePoint::planar(q[0], q[1], q[2])
            }
        };
        let guess = match start.and_then(|s| s.predict(&target)) {
            Some(q) if q[2 * n - 1] > 0.0 && q[2 * n - 1] < self.radius => q,
            _ => {
                let p0 = SpherePoint::from_vector(&x, &y)?;
                let mut q = p0.coords();
                q.push(self.metric.eval_f(&x, &y)?.min(0.99 * self.radius));
                DVector::from_vec(q)
            }
        };
        with_dim!(n, N => {
            let residual = |q: &DVector<f64>| -> Result<(DVector<f64>, DVector<Complex64>)> {
                let (base, disp, vel) = mu_raw::<N>(&self.continuation, &to_point(q), q[2 * N - 1])?;
                let res = DVector::from_fn(2 * N, |k, _| {
                    if k < N {
                        wrap_pi((base[k].re - target[k]) + disp[k].re)
                    } else {
                        disp[k - N].im - target[k]
                    }
                });
                Ok((res, DVector::from_iterator(N, vel.iter().copied())))
            };
            let jacobian = |q: &DVector<f64>, res: &DVector<f64>, vel: &DVector<Complex64>| -> Result<DMatrix<f64>> {
                let mut jac = DMatrix::zeros(2 * N, 2 * N);
                for k in 0..2 * N - 1 {
                    let d = 1e-7 * q[k].abs().max(1.0);
                    let mut qk = q.clone();
                    qk[k] += d;
                    let (rk, _) = residual(&qk)?;
                    for row in 0..2 * N {
                        let diff = if row < N { wrap_pi(rk[row] - res[row]) } else { rk[row] - res[row] };
                        jac[(row, k)] = diff / d;
                    }
                }
                // ∂μ/∂r = i·γ'
                for j in 0..N {
                    jac[(j, 2 * N - 1)] = -vel[j].im;
                    jac[(N + j, 2 * N - 1)] = vel[j].re;
                }
                Ok(jac)
            };
            self.newton(guess, start.and_then(|s| s.jacobian.clone()), residual, jacobian)
                .map(|(q, jac)| {
                    let tc = TubeCoordinates { p: to_point(&q).normalized(), r: q[2 * N - 1] };
                    (tc, NewtonStart { q, jacobian: jac, anchor: target.clone() })
                })
        })
    }

    /// Damped chord-Newton iteration. The Jacobian is computed only when a step
    /// is needed and refreshed when contraction stalls.
    fn newton<R, J>(
        &self,
        mut q: DVector<f64>,
        mut jac: Option<DMatrix<f64>>,
        residual: R,
        jacobian: J,
    ) -> Result<(DVector<f64>, Option<DMatrix<f64>>)>
    where
        R: Fn(&DVector<f64>) -> Result<(DVector<f64>, DVector<Complex64>)>,
        J: Fn(&DVector<f64>, &DVector<f64>, &DVector<Complex64>) -> Result<DMatrix<f64>>,
    {
        let tol = self.config.newton.tol;
        let max_iter = self.config.newton.max_iter;
        let last = q.len() - 1;
        let (mut res, mut vel) = residual(&q)?;
        let mut norm = res.amax();
        let mut fresh = false;
        let mut polish = 0;
        for _ in 0..max_iter {
            if norm <= tol {
                // Extra chord steps push the residual toward roundoff.
                if polish == 4 || norm == 0.0 {
                    return Ok((q, jac));
                }
                polish += 1;
            }
            let current = match jac.take() {
                Some(j) => j,
                None => {
                    fresh = true;
                    jacobian(&q, &res, &vel)?
                }
            };
            let solved = current.clone().lu().solve(&(-&res));
            jac = Some(current);
            let Some(step) = solved else {
                if fresh {
                    break;
                }
                jac = None;
                continue;
            };
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let mut trial = &q + &step * scale;
                if trial[last] <= 0.0 {
                    trial[last] = 0.5 * q[last];
                }
                if trial[last] >= self.radius {
                    trial[last] = 0.5 * (q[last] + self.radius);
                }
                match residual(&trial) {
                    Ok((r_new, v_new)) if r_new.amax() < norm => {
                        accepted = Some((trial, r_new, v_new));
                        break;
                    }
                    Ok(_) if norm <= tol => break,
                    Ok(_) | Err(Error::BranchCutProximity { .. }) | Err(Error::TubeExceeded { .. }) => {
                        scale *= 0.5;
                    }
                    Err(e) => return Err(e),
                }
            }
            match accepted {
                Some((trial, r_new, v_new)) => {
                    let new_norm = r_new.amax();
                    let slow = new_norm > 0.25 * norm;
                    q = trial;
                    res = r_new;
                    vel = v_new;
                    norm = new_norm;
                    if slow && norm > tol {
                        jac = None;
                    }
                    fresh = false;
                }
                None if norm <= tol => return Ok((q, jac)),
                None if !fresh => jac = None,
                None => break,
            }
        }
        if norm <= tol {
            return Ok((q, jac));
        }
        Err(Error::NewtonDiverged {
            residual: norm,
            iterations: max_iter,
        })
    }

    /// `u(ζ)`: the tube coordinate `r` of `ζ`, and `0` on `M`.
    pub fn eval_u(&self, zeta: &ComplexPoint) -> Result<f64> {
        self.check_point(zeta)?;
        if zeta.im_norm() < SINGULAR_SET_CUTOFF {
            return Ok(0.0);
        }
        Ok(self.invert_mu(zeta)?.r)
    }
}

/// `count` quasi-random tube parameters `(p, r)` with `r ∈ [r_lo, r_hi)`.
pub fn sample_tube(dim: usize, count: usize, seed: u64, r_lo: f64, r_hi: f64) -> Vec<(SpherePoint, f64)> {
    let mut seq = QuasiRandom::new(2 * dim, seed);
    (0..count)
        .map(|_| {
            let u = seq.next_point();
            let tau = std::f64::consts::TAU;
            let p = if dim == 1 {
                SpherePoint::on_line(tau * u[0], u[1] < 0.5)
            } else {
                SpherePoint::planar(tau * u[0], tau * u[1], tau * u[2])
            };
            (p, r_lo + (r_hi - r_lo) * u[2 * dim - 1])
        })
        .collect()
}

/// Quasi-random rays of `SM`.
pub fn sample_rays(dim: usize, count: usize, seed: u64) -> Vec<SpherePoint> {
    sample_tube(dim, count, seed, 0.0, 1.0)
        .into_iter()
        .map(|(p, _)| p)
        .collect()
}

pub(crate) fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.min()
}
